fn main() {
    std::process::exit(qisim_core::cli::main_from(std::env::args_os()));
}
