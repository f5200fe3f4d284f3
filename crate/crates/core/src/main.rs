use clap::Parser;

fn main() -> std::process::ExitCode {
    polytraj::cli::run(polytraj::cli::Cli::parse())
}
