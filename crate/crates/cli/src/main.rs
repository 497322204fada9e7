use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{value_parser, Arg, ArgAction, ArgMatches, Command};
use rwre::harness::{experiment_names, run_file, RunOptions};

fn experiment_command(name: &'static str) -> Command {
    Command::new(name)
        .about(format!("run the `{name}` experiment"))
        .arg(Arg::new("config").long("config").value_name("PATH").required(true).value_parser(value_parser!(PathBuf)))
        .arg(Arg::new("seed").long("seed").value_name("N").value_parser(value_parser!(u64)).help("override the config seed"))
        .arg(Arg::new("out").long("out").value_name("DIR").value_parser(value_parser!(PathBuf)).help("output directory"))
        .arg(Arg::new("force").long("force").action(ArgAction::SetTrue).help("ignore the op budget guard"))
}

fn cli() -> Command {
    Command::new("rwre")
        .about("Random walk in random environment experiments")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommands(experiment_names().into_iter().map(experiment_command))
}

fn run(name: &str, m: &ArgMatches) -> ExitCode {
    let opts = RunOptions {
        seed: m.get_one::<u64>("seed").copied(),
        out_dir: m.get_one::<PathBuf>("out").cloned(),
        force: m.get_flag("force"),
    };
    let config = m.get_one::<PathBuf>("config").expect("required");
    let t0 = Instant::now();
    match run_file(config, Some(name), &opts) {
        Ok((csv, json)) => {
            eprintln!("{name}: wrote {} and {} in {:.2}s", csv.display(), json.display(), t0.elapsed().as_secs_f64());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("rwre {name}: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn main() -> ExitCode {
    let matches = cli().get_matches();
    let (name, sub) = matches.subcommand().expect("subcommand required");
    run(name, sub)
}
