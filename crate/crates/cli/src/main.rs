fn main() {
    std::process::exit(replay_qlab_cli::cli_main(std::env::args_os()));
}
