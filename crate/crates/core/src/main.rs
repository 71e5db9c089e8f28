fn main() {
    std::process::exit(setpoint_oco::cli::main_with_args(std::env::args_os()));
}
