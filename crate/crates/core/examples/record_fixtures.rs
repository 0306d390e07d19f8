//! Rewrites the generated files in `data/bench`.
//!
//! ```text
//! cargo run -p coalition --example record_fixtures
//! ```

#[path = "../tests/support/bundle.rs"]
mod bundle;

use std::path::Path;

fn main() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/bench");
    for (name, contents) in bundle::generate(&dir) {
        std::fs::write(dir.join(name), contents).unwrap();
        println!("wrote {name}");
    }
}
