#![no_main]

use libfuzzer_sys::fuzz_target;
use retromfg_core::expr::Expr;

fuzz_target!(|data: &[u8]| {
    if let Ok(src) = std::str::from_utf8(data) {
        if let Ok(e) = Expr::parse(src) {
            let x = vec![0.25; e.required_dim()];
            let _ = e.eval(&x, 0.5);
        }
    }
});
