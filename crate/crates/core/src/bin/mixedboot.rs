fn main() {
    // CLI wired up once the library surface is complete.
}
