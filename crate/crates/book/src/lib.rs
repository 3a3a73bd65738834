//! mdbook cannot link crates into its tests, so each chapter is included
//! here as module docs and `cargo test --doc` runs its listings.

macro_rules! chapters {
    ($($module:ident => $file:literal),* $(,)?) => {
        $(
            #[doc = include_str!(concat!("../../../book/src/", $file))]
            pub mod $module {}
        )*
    };
}

chapters! {
    introduction => "introduction.md",
    tape => "tape.md",
    model => "model.md",
    objective => "objective.md",
    data => "data.md",
    training => "training.md",
    evaluation => "evaluation.md",
    search => "search.md",
    reproducibility => "reproducibility.md",
    cli => "cli.md",
}
