//! Library side of the CLI: the SVG timeline renderer, shared with the
//! binary and the test suites.

pub mod svg;
