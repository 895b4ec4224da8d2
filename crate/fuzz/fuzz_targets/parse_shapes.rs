#![no_main]

use libfuzzer_sys::fuzz_target;
use smsr::io::{parse_shapes, write_shapes};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(shapes) = parse_shapes(text) {
        let mut buf = Vec::new();
        write_shapes(&shapes, &mut buf).unwrap();
        let again = parse_shapes(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(again, shapes);
    }
});
