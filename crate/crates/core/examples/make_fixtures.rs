//! Regenerates the synthetic fixtures under `tests/fixtures`.
//!
//! ```text
//! cargo run -p mutacc --example make_fixtures
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use mutacc::model::ActivationKind;
use mutacc::model_io::save_model;
use mutacc::synthetic::{fcnn, teacher_dataset};
use mutacc::Model32;

struct Fixture {
    name: &'static str,
    input: [usize; 2],
    hidden: &'static [usize],
    classes: usize,
    count: usize,
    seed: u64,
}

const FIXTURES: [Fixture; 2] = [
    Fixture {
        name: "tiny",
        input: [8, 8],
        hidden: &[6, 5],
        classes: 3,
        count: 60,
        seed: 11,
    },
    Fixture {
        name: "fcnn",
        input: [28, 28],
        hidden: &[50, 50, 50],
        classes: 10,
        count: 500,
        seed: 7,
    },
];

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    std::fs::create_dir_all(&dir)?;
    for f in &FIXTURES {
        let model: Model32 = fcnn(f.input, f.hidden, f.classes, ActivationKind::Relu, f.seed);
        let data = teacher_dataset(&model, f.count, 0.05, f.seed + 1);
        let mut meta = BTreeMap::new();
        meta.insert(
            "source".to_string(),
            format!("synthetic fcnn seed {}", f.seed),
        );
        save_model(&model, &meta, dir.join(format!("{}.mutacc", f.name)))?;
        std::fs::write(
            dir.join(format!("{}-images.idx", f.name)),
            data.images_idx(),
        )?;
        std::fs::write(
            dir.join(format!("{}-labels.idx", f.name)),
            data.labels_idx(),
        )?;
        println!("{}: {} images, {} classes", f.name, f.count, f.classes);
    }
    Ok(())
}
