#![no_main]

use jointspace::corpus::parse_documents;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(docs) = parse_documents(text) {
        for doc in &docs {
            assert!(!doc.id.is_empty());
            assert!(!doc.sentences.is_empty());
            assert!(doc.sentences.iter().all(|s| !s.is_empty()));
        }
    }
});
