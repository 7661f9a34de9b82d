use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match symbolnet_cli::Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let err = symbolnet_cli::error::CliError::Config(e.to_string().trim().to_string());
            eprintln!("{}", err.to_json());
            std::process::exit(err.exit_code());
        }
    };
    if let Err(e) = symbolnet_cli::run(cli) {
        eprintln!("{}", e.to_json());
        std::process::exit(e.exit_code());
    }
}
