// debug: replicate pretrain loop with shuffled order + logging
use g2t_core::backbone::*;
use g2t_core::vocab::{Vocab, MIN_VOCAB};
use g2t_core::nn::{Lease, Sgd};
use g2t_core::tape::Tape;
use rand::seq::SliceRandom;

fn main() {
    let vocab_corpus: Vec<String> = vec![
        "the molecule dissolves in water".into(),
        "a ring of carbon atoms".into(),
        "this compound contains oxygen and nitrogen".into(),
    ];
    let vocab = Vocab::build(&vocab_corpus, MIN_VOCAB).unwrap();
    let corpus: Vec<String> = (0..12).map(|i| {
        if i % 2 == 0 { "the molecule dissolves in water".to_string() }
        else { "a ring of carbon atoms".to_string() }
    }).collect();
    let mut r = g2t_core::rng(55);
    let mut params = BackboneParams::new(&mut r, vocab.len(), 16);
    let mut opt = Sgd::new(0.05, 0.9);
    let seqs: Vec<Vec<usize>> = corpus.iter().map(|l| {
        let mut ids = vec![1usize];
        ids.extend(vocab.tokenize(l));
        ids.push(2);
        ids
    }).collect();
    let mut order: Vec<usize> = (0..seqs.len()).collect();
    let mut cursor = order.len();
    for step in 0..80 {
        let mut tape = Tape::new();
        let vars = params.bind(&mut tape, Lease::Train);
        let mut losses = vec![];
        for _ in 0..2 {
            if cursor >= order.len() { order.shuffle(&mut r); cursor = 0; }
            let ids = &seqs[order[cursor]];
            cursor += 1;
            let inputs = &ids[..ids.len()-1];
            let targets = &ids[1..];
            let embeds = tape.embedding_lookup(vars.embed, inputs).unwrap();
            let hidden = vars.forward(&mut tape, embeds).unwrap();
            let logits = vars.logits(&mut tape, hidden).unwrap();
            losses.push(tape.cross_entropy_rows(logits, targets).unwrap());
        }
        let stacked = tape.concat_rows(&losses).unwrap();
        let loss = tape.mean_all(stacked);
        let lv = tape.value(loss).item().unwrap();
        println!("step {step}: loss {lv:.4}");
        if !lv.is_finite() { break; }
        let mut grads = tape.backward(loss).unwrap();
        let named = g2t_core::nn::grads_by_name(&params.named(), &vars.var_list(), &mut grads);
        opt.step(params.named_mut(), &named);
    }
}
