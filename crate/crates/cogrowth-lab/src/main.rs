fn main() {
    std::process::exit(cogrowth_lab::cli::main_entry());
}
