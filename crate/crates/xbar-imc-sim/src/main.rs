fn main() {
    std::process::exit(xbar_imc_sim::cli::main_with(std::env::args_os()));
}
