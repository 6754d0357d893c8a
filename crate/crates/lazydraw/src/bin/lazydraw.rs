fn main() {
    std::process::exit(lazydraw::cli::main_from_env());
}
