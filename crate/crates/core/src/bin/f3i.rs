use clap::Parser;

fn main() {
    let cli = f3i::cli::Cli::parse();
    match f3i::cli::run(cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(2);
        }
    }
}
