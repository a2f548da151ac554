//! Reads a TOML run configuration with command-line style overrides and
//! prints the resolved result. Unknown keys are errors.
//!
//! ```text
//! cargo run --example config_file -- [config.toml] [key=value ...]
//! ```

use pctl::config::FileConfig;

fn main() {
    let mut args = std::env::args().skip(1);
    let path = args.next();
    let overrides: Vec<String> = args.collect();
    match FileConfig::load(path.as_deref().map(AsRef::as_ref), &overrides) {
        Ok(cfg) => {
            print!("{}", cfg.to_toml());
            if let Err(e) = cfg.train_config().validate() {
                eprintln!("invalid: {e}");
            }
        }
        Err(e) => eprintln!("error: {e}"),
    }

    // A misspelt key names itself.
    let typo = FileConfig::parse("[loss]\nlamda = 0.5\n", &[]);
    println!("\n# with a typo: {}", typo.unwrap_err());
}
