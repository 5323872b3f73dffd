fn main() {
    // Die quietly when the output pipe closes (`unbit ... | head`); Rust
    // masks SIGPIPE by default and println! would panic instead.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let code = unbit::cli::run(std::env::args().skip(1));
    std::process::exit(code);
}
