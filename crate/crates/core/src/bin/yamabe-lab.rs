fn main() {
    std::process::exit(yamabe_lab::lab_cli::main_with(std::env::args_os()));
}
