use std::process::ExitCode;

fn main() -> ExitCode {
    nfcnn::cli::run(std::env::args_os())
}
