fn main() {
    eprintln!("error: cli not wired yet");
    std::process::exit(1);
}
