use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = blurdecomp_cli::Cli::parse();
    if let Err(e) = blurdecomp_cli::run(cli) {
        eprintln!("{}", e.to_json_line());
        std::process::exit(match e.status() {
            400 => 2,
            404 => 3,
            409 => 4,
            422 => 5,
            _ => 1,
        });
    }
}
