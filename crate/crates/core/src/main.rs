fn main() {
    std::process::exit(reasoning_flow::harness::dispatch(std::env::args_os()));
}
