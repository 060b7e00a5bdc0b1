fn main() {
    std::process::exit(pet_cli::run(std::env::args_os()));
}
