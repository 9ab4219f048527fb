fn main() { std::process::exit(svi2::cli::run(std::env::args_os())); }
