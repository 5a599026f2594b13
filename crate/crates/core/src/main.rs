fn main() {
    std::process::exit(ellcert::cli::run(std::env::args_os()));
}
