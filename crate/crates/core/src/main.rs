use clap::Parser;

fn main() {
    let cli = pinchsim::cli::Cli::parse();
    std::process::exit(pinchsim::cli::run(cli));
}
