fn main() { std::process::exit(agro::cli::main()); }
