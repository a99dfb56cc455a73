fn main() {
    std::process::exit(cauliflow_cli::main_with(std::env::args_os()));
}
