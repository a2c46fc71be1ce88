mod args;
mod run;
mod svg;

use clap::error::ErrorKind;
use clap::Parser;

use args::Cli;
use run::Failure;

fn fail(f: &Failure, command: Option<&str>) -> ! {
    eprintln!("{}", f.to_json(command));
    std::process::exit(f.code);
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => match e.kind() {
            ErrorKind::DisplayHelp
            | ErrorKind::DisplayVersion
            | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => e.exit(),
            _ => {
                let mut f = Failure::usage(e.kind().to_string());
                f.context
                    .insert("usage".into(), serde_json::json!(e.render().to_string()));
                fail(&f, None)
            }
        },
    };
    let name = cli.command.name();
    if let Err(f) = run::run(cli.command) {
        fail(&f, Some(name));
    }
}
