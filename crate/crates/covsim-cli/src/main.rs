fn main() -> std::process::ExitCode {
    covsim_cli::main_entry()
}
