fn main() {
    std::process::exit(salient_clue_cli::run(std::env::args_os()));
}
