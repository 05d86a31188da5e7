use clap::Parser;

use limsup_lab::{run, Cli};

fn main() {
    let cli = Cli::parse();
    if let Some(n) = std::env::var("LIMSUP_LAB_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().ok();
    }
    let outcome = match run(&cli) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("limsup-lab: {e}");
            std::process::exit(e.exit_code());
        }
    };
    for line in &outcome.summary {
        println!("{line}");
    }
    if !outcome.ok {
        std::process::exit(1);
    }
}
