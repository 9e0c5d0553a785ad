import numpy as np
import pytest
import torch

from dualvc.encoder import stub_encoder
from dualvc.fixture import render_phones
from dualvc.phonetics import (
    EmptyReferenceError, PhoneInventory, PhoneTranscript, PrModel, PrStage, PseudoRecord,
    corpus_per, gen_pseudo, greedy_decode, load_inventory, load_pr_checkpoint, per,
    read_pseudo_manifest, save_pr_checkpoint, train_pr, write_pseudo_manifest,
)
from oracles import edit_distance_oracle, greedy_oracle, per_oracle


def test_bundled_inventory():
    inv = load_inventory()
    assert len(inv) == 53 and inv.blank_id == 53
    ids = inv.encode(f"{inv.phones[0]} {inv.phones[5]}")
    assert ids == (0, 5) and inv.decode(ids) == f"{inv.phones[0]} {inv.phones[5]}"
    with pytest.raises(ValueError):
        inv.encode("not-a-phone")


def test_inventory_rejects_duplicates():
    with pytest.raises(ValueError):
        PhoneInventory(("a", "a"))


def test_transcript_rejects_blank_id():
    with pytest.raises(ValueError):
        PhoneTranscript((0, 4), n_phones=4)


def test_greedy_examples():
    V = 4
    post = np.eye(V)[[0, 0, 3, 0, 1, 1, 3]]
    assert greedy_decode(post).phone_ids == (0, 0, 1)
    assert greedy_decode(np.eye(V)[[3] * 6]).phone_ids == ()


def test_greedy_against_oracle(backend):
    rng = np.random.default_rng(0)
    for _ in range(300):
        V = int(rng.integers(2, 7))
        post = rng.dirichlet(np.ones(V), size=int(rng.integers(1, 30)))
        out = greedy_decode(post).phone_ids
        assert out == greedy_oracle(post, V - 1)
        assert V - 1 not in out


def test_per_examples():
    assert per((3, 7), (3,)) == 50.0
    assert per((1, 2, 3), (1, 2, 3)) == 0.0
    assert per((), ()) == 0.0
    with pytest.raises(EmptyReferenceError):
        per((), (1,))


def test_per_against_oracle(backend):
    rng = np.random.default_rng(1)
    for _ in range(300):
        r = tuple(rng.integers(0, 5, int(rng.integers(1, 9))).tolist())
        h = tuple(rng.integers(0, 5, int(rng.integers(0, 9))).tolist())
        assert per(r, h) == pytest.approx(per_oracle(r, h), abs=1e-12)
        assert per(r, r) == 0.0


def test_per_not_symmetric_in_general():
    assert per((1, 2), (1, 2, 3, 4)) != per((1, 2, 3, 4), (1, 2))
    r, h = (1, 2, 3), (3, 2, 1)
    assert per(r, h) == per(h, r)  # equal lengths
    assert edit_distance_oracle(r, h) == 2


def test_corpus_per_counts_empty_references():
    val, n_empty = corpus_per([((1, 2), (1,)), ((), (5,)), ((3, 4, 5, 6), (3, 4, 5, 6))])
    assert val == pytest.approx(100 / 6) and n_empty == 1


def _utterances(rng, n):
    out = []
    for _ in range(n):
        ids = [int(i) for i in rng.integers(0, 4, size=2)]
        out.append((render_phones(ids, rng), PhoneTranscript(ids, n_phones=4)))
    return out


@pytest.fixture(scope="module")
def trained_pr():
    torch.manual_seed(0)
    rng = np.random.default_rng(0)
    train, held = _utterances(rng, 30), _utterances(rng, 20)
    model = PrModel(stub_encoder(0, 2, 32), 4, width=64)
    model, hist = train_pr(model, [PrStage("synthetic", train, 20, lr_head=3e-3, lr_encoder=1e-5)], batch_size=4)
    return model, hist, held


def test_pr_loss_decreases_over_first_epochs(trained_pr):
    _, hist, _ = trained_pr
    first = hist.epoch_loss[:5]
    assert all(b < a for a, b in zip(first, first[1:]))


def test_pr_held_out_per_below_half(trained_pr):
    model, _, held = trained_pr
    val, _ = corpus_per([(ref, model.transcribe(w)) for w, ref in held])
    assert val < 50.0


def test_zero_epoch_recipe_leaves_model_unchanged():
    torch.manual_seed(0)
    model = PrModel(stub_encoder(0, 2, 16), 4, width=16)
    before = {k: v.clone() for k, v in model.state_dict().items()}
    utt = _utterances(np.random.default_rng(0), 3)
    model, hist = train_pr(model, [PrStage("a", utt, 0)])
    assert hist.epoch_loss == []
    for k, v in model.state_dict().items():
        assert torch.equal(v, before[k])


def test_long_and_infeasible_utterances_skipped():
    model = PrModel(stub_encoder(0, 2, 16), 4, width=16)
    long = (np.zeros(16000 * 15, dtype=np.float32), PhoneTranscript((1,), n_phones=4))
    dense = (np.zeros(1600, dtype=np.float32), PhoneTranscript((1,) * 20, n_phones=4))
    ok = _utterances(np.random.default_rng(0), 1)
    _, hist = train_pr(model, [PrStage("a", [long, dense] + ok, 1)])
    assert hist.skipped_long == 1 and hist.skipped_infeasible == 1


def test_gen_pseudo_keeps_empty_and_is_deterministic(trained_pr, tmp_path):
    model, _, held = trained_pr
    items = [("silence", 0.0, 1.0, np.zeros(16000, dtype=np.float32))]
    items += [(f"u{i}", 0.0, len(w) / 16000, w) for i, (w, _) in enumerate(held[:4])]
    a = gen_pseudo(model, items)
    b = gen_pseudo(model, items)
    assert len(a) == len(items) and a == b
    assert a[0].transcript.phone_ids == () and a[0].transcript.source == "pseudo"
    inv = PhoneInventory(("p", "t", "k", "a"))
    write_pseudo_manifest(tmp_path / "pseudo.jsonl", a, inv)
    assert read_pseudo_manifest(tmp_path / "pseudo.jsonl", inv) == a


def test_pr_checkpoint_round_trip(trained_pr, tmp_path):
    model, _, held = trained_pr
    inv = PhoneInventory(("p", "t", "k", "a"))
    save_pr_checkpoint(tmp_path / "pr.pt", model, {"type": "stub", "seed": 0, "num_layers": 2, "hidden_dim": 32}, inv)
    back, inv2 = load_pr_checkpoint(tmp_path / "pr.pt")
    assert inv2 == inv
    w = held[0][0]
    assert back.transcribe(w) == model.transcribe(w)


def test_pseudo_record_fields():
    r = PseudoRecord("s:0001", 1.0, 2.0, PhoneTranscript((), "pseudo"))
    assert len(r.transcript) == 0
