use std::io::Write;

fn main() {
    let env_seed = std::env::var(qshield::harness::SEED_ENV).ok();
    let code = {
        let mut out = std::io::stdout().lock();
        let mut err = std::io::stderr().lock();
        let code =
            qshield::harness::run_cli(std::env::args_os(), env_seed.as_deref(), &mut out, &mut err);
        let _ = out.flush();
        code
    };
    std::process::exit(code);
}
