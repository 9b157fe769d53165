use clap::Parser;

fn main() -> anyhow::Result<()> {
    paramcast_cli::run(paramcast_cli::Cli::parse())
}
