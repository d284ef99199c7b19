//! `vre-parallel ARGS` is `vre parallel ARGS`.

fn main() {
    vre_cli::init_logging();
    let mut args = std::env::args_os();
    let argv = [args.next().unwrap_or_else(|| "vre".into()), "parallel".into()]
        .into_iter()
        .chain(args);
    std::process::exit(vre_cli::main_with(argv));
}
