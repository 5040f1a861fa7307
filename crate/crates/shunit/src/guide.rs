//! The narrative guide. Each chapter of `book/src` is included as module
//! documentation here, so every code block in the book compiles and runs
//! under `cargo test --doc` — the book cannot drift from the library.

macro_rules! chapter {
    ($name:ident, $path:literal) => {
        #[doc = include_str!($path)]
        pub mod $name {}
    };
}

chapter!(introduction, "../../../book/src/introduction.md");
chapter!(data, "../../../book/src/data.md");
chapter!(autodiff, "../../../book/src/autodiff.md");
chapter!(encoders, "../../../book/src/encoders.md");
chapter!(style_memory, "../../../book/src/style-memory.md");
chapter!(harmonization, "../../../book/src/harmonization.md");
chapter!(objectives, "../../../book/src/objectives.md");
chapter!(training, "../../../book/src/training.md");
chapter!(evaluation, "../../../book/src/evaluation.md");
chapter!(cli, "../../../book/src/cli.md");
