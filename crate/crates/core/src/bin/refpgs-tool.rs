//! The reference likelihood-ratio tool as a standalone process speaking the
//! line protocol on stdin/stdout.

use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use robust_audit::adapters::{serve, ReferencePgsTool};
use robust_audit::refpgs::FrequencyTable;
use robust_audit::ToolAdapter;

#[derive(Parser)]
#[command(name = "refpgs-tool", version)]
struct Args {
    #[arg(long)]
    frequencies: PathBuf,
    /// Enumeration bound per locus and hypothesis.
    #[arg(long)]
    bound: Option<u64>,
    /// Print the tool identity as JSON and exit.
    #[arg(long)]
    identity: bool,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let table = match std::fs::read_to_string(&args.frequencies)
        .map_err(|e| e.to_string())
        .and_then(|t| FrequencyTable::load(&t).map_err(|e| e.to_string()))
    {
        Ok(t) => t,
        Err(e) => {
            eprintln!("refpgs-tool: {}: {e}", args.frequencies.display());
            return ExitCode::from(2);
        }
    };
    let mut tool = match ReferencePgsTool::new(&table) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("refpgs-tool: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(b) = args.bound {
        tool = tool.with_bound(b);
    }
    if args.identity {
        println!("{}", serde_json::to_string(&tool.identity()).expect("identity serializes"));
        return ExitCode::SUCCESS;
    }
    let stdin = std::io::stdin().lock();
    let mut stdout = BufWriter::new(std::io::stdout().lock());
    let served = serve(stdin, &mut stdout, |p| tool.evaluate(p));
    let _ = stdout.flush();
    match served {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("refpgs-tool: {e}");
            ExitCode::from(3)
        }
    }
}
