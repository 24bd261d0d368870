fn main() {
    std::process::exit(stn_lab::cli::run());
}
