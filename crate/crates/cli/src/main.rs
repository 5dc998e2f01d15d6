fn main() {
    std::process::exit(clan_sim_cli::run_command(std::env::args_os()));
}
