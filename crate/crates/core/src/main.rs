fn main() {
    let code = robust_risk::simlab::cli::run(std::env::args_os(), &mut std::io::stdout());
    std::process::exit(code);
}
