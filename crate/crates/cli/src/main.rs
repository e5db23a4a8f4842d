use std::io::Write;
use std::process::ExitCode;

use bioauth_lab::{run, Cli};
use clap::Parser;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.opts.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
        {
            eprintln!("bioauth-lab: {e}");
            return ExitCode::from(2);
        }
    }
    let result = run(&cli).and_then(|out| out.write_files().map(|()| out));
    match result {
        Ok(out) => {
            let _ = std::io::stdout().write_all(out.stdout.as_bytes());
            ExitCode::from(out.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("bioauth-lab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
