fn main() {
    std::process::exit(ddmpc::cli_stub());
}
