fn main() {
    let env = env_logger::Env::new().filter_or("DELTACERT_LOG", "warn");
    let _ = env_logger::Builder::from_env(env).try_init();
    std::process::exit(deltacert::cli::run(std::env::args_os()));
}
