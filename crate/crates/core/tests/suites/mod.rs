//! Check bodies shared by the per-suite test targets and the acceptance run.

#![allow(dead_code)]

pub mod expressivity;
pub mod gradients;
pub mod properties;

/// One `#[test]` per entry of a suite's check list.
#[macro_export]
macro_rules! tests_for {
    ($suite:ident: $($name:ident),* $(,)?) => {
        $(
            #[test]
            fn $name() {
                suites::$suite::$name()
            }
        )*
    };
}
