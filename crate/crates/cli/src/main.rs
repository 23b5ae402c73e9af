fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("AID_LOG", "info")).init();
    std::process::exit(aid_cli::run(std::env::args_os()));
}
