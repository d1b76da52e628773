fn main() {
    std::process::exit(treecast_cli::run(std::env::args_os()));
}
