use clap::error::ErrorKind;
use clap::Parser;
use wsci_fusion_cli::{run, Cli, CliError};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            e.exit()
        }
        Err(e) => fail(CliError::usage(
            e.to_string()
                .lines()
                .next()
                .unwrap_or("invalid arguments")
                .trim_start_matches("error: "),
        )),
    };
    if let Err(e) = run(cli) {
        fail(e);
    }
}

fn fail(e: CliError) -> ! {
    eprintln!("{}", e.to_line());
    std::process::exit(e.code);
}
