#![no_main]

use libfuzzer_sys::fuzz_target;
use nrulab::tasks::{iter_tbptt, TextCorpus};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(corpus) = TextCorpus::parse(text) {
        assert_eq!(corpus.encode(text).expect("own text encodes"), corpus.ids);
        if let Ok(windows) = iter_tbptt(&corpus.ids, corpus.vocab.len(), 2, 3) {
            for w in windows.take(4) {
                w.expect("window builds");
            }
        }
    }
});
