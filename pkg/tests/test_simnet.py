"""Simulator determinism, taps, the scenario script, and the closure engine."""

import pytest

from dnascreen import terms
from dnascreen.closure import Knowledge, build_knowledge, secrecy_probe
from dnascreen.crypto import TEST_BACKEND, aead_seal
from dnascreen.errors import ScriptError
from dnascreen.scenarios import (
    CLEAN_SEQUENCES,
    DEFAULT_HAZARDS,
    ScenarioConfig,
    build_world,
    run_scenario,
    scenario_honest_basic,
    scenario_honest_exemption,
)
from dnascreen.simnet import Selector, SimNetwork, TapRule

B = TEST_BACKEND
HAZ = DEFAULT_HAZARDS[0][0].hex()
CLEAN = CLEAN_SEQUENCES[0].hex()


def test_selector_parsing():
    s = Selector.parse("S->H:s2c:1:r1")
    assert (s.link, s.direction, s.conn, s.rec_seq) == ("S->H", "s2c", 1, 1)
    s = Selector.parse("K1->K2:c2s:0:m3")
    assert s.nth == 3 and s.rec_seq is None
    for bad in ("S->H:up:0:r1", "S->H:c2s:0:x1", "nonsense"):
        with pytest.raises(ScriptError):
            Selector.parse(bad)


def test_script_determinism_and_seed_sensitivity():
    config = ScenarioConfig()
    script = f"query S {HAZ},{CLEAN}\nadvance-clock 60\nquery S {CLEAN}"
    a = run_scenario(config, script, seed=5)
    b = run_scenario(ScenarioConfig(), script, seed=5)
    assert a.transcript_text == b.transcript_text
    c = run_scenario(ScenarioConfig(), script, seed=6)
    assert a.transcript_text != c.transcript_text


def test_script_rejects_unknown_command_and_role():
    with pytest.raises(ScriptError):
        run_scenario(ScenarioConfig(), "frobnicate S", seed=1)
    with pytest.raises(ScriptError):
        run_scenario(ScenarioConfig(), f"query S9 {CLEAN}", seed=1)
    with pytest.raises(ScriptError):
        run_scenario(ScenarioConfig(), "corrupt NOSUCH mitm", seed=1)
    with pytest.raises(ScriptError):
        run_scenario(ScenarioConfig(), f"query-exempt S {CLEAN} code=fresh",
                     seed=1)  # no exemption token configured


def test_script_comments_and_deliver_are_noise():
    script = f"# a comment\ndeliver\nquery S {CLEAN}\n\n"
    result = run_scenario(ScenarioConfig(), script, seed=7)
    assert result.outcome.ok


def test_drop_command_breaks_the_query():
    script = f"drop S->H:c2s:0:m0\nquery S {CLEAN}"
    result = run_scenario(ScenarioConfig(), script, seed=8)
    failed = [a for a in result.outcome.assertions
              if a.id == "query-1-matches-oracle"]
    assert failed and not failed[0].passed
    assert "MessageDropped" in failed[0].evidence


def test_inject_is_recorded_and_rejected():
    config = ScenarioConfig()
    world = build_world(config, seed=9)
    world.synth.basic_query([CLEAN_SEQUENCES[0]])
    world.net.inject("S->H", b"\xde\xad\xbe\xef")
    kinds = [ev.kind for ev in world.net.transcript.events]
    assert "inject" in kinds
    assert any("injection rejected" in n for n in world.net.notes)
    with pytest.raises(ScriptError):
        world.net.inject("S->Z", b"00")


def test_swap_tap_replaces_bytes():
    net = SimNetwork(seed=1)

    class Echo:
        name = "E"
        net = None

        def open_connection(self):
            outer = self

            class C:
                def handle(self, data, term=None):
                    return terms.Payload.opaque(b"reply:" + data)
            return C()

        def long_term_key_atoms(self):
            return []

    net.register_role(Echo())
    net.add_tap(TapRule(Selector("X->E", "c2s", 0, nth=0), "capture",
                        name="first"))
    net.add_tap(TapRule(Selector("X->E", "c2s", 1, nth=0), "replace",
                        name="first"))
    conn0 = net.dial("X", "E")
    assert conn0.send(b"alpha") == b"reply:alpha"
    conn1 = net.dial("X", "E")
    # the second connection's first message is replaced with "alpha"
    assert conn1.send(b"bravo") == b"reply:alpha"
    advs = [ev for ev in net.transcript.events if ev.kind == "adv"]
    assert advs and advs[0].note == "delivered in place of the original"


# --- closure engine ------------------------------------------------------------


def test_closure_splits_and_decrypts():
    key = bytes(range(32))
    inner = terms.cat(terms.Atom("cookie", b"\xaa" * 32), terms.nonce(b"\xbb" * 32))
    ct = aead_seal(key, 0, b"whatever")
    sealed = terms.Sealed(terms.key_atom(key).label, 0, inner, ct)
    kn = Knowledge(B)
    kn.add(sealed, "tapped")
    kn.close()
    assert kn.holds_bytes(b"\xaa" * 32) is None  # key unknown: stays sealed
    kn.add(terms.key_atom(key), "initial: corrupt role")
    kn.close()
    hit = kn.holds_bytes(b"\xaa" * 32)
    assert hit is not None
    evidence = "\n".join(kn.derivation(hit))
    assert "decrypt" in evidence and "split" in evidence


def test_closure_unblinds_with_known_scalar():
    # blinded element plus the blinding scalar: the base leaks, and the
    # derivation tree is explicit
    h = B.hash_to_group(b"secret sequence")
    base = terms.Atom("element", h.encode(), label="M(736563726574)")
    beta = B.scalar(3)
    beta_atom = terms.scalar_atom(beta.encode())
    blinded = terms.ExpTerm(base, ((beta_atom.label, 1),),
                            h.exp(beta).encode())
    kn = Knowledge(B)
    kn.add(blinded, "tapped")
    kn.close()
    assert kn.holds_atom_label("M(736563726574)") is None
    kn.add(beta_atom, "initial: corrupt synthesizer")
    kn.close()
    hit = kn.holds_atom_label("M(736563726574)")
    assert hit is not None
    assert "exp[" in "\n".join(kn.derivation(hit))


def test_closure_does_not_brute_force_the_tiny_group():
    # knowing an unrelated scalar never cancels the blind, even though the
    # concrete 11-element group cycles quickly
    h = B.hash_to_group(b"secret")
    base = terms.Atom("element", h.encode(), label="M(2e2e)")
    beta = B.scalar(10)  # order 2 mod 11: beta * beta = 1 concretely
    blinded = terms.ExpTerm(base, ((terms.scalar_atom(beta.encode()).label,
                                    1),), h.exp(beta).encode())
    other = terms.scalar_atom(B.scalar(10).encode())
    kn = Knowledge(B)
    kn.add(blinded, "tapped")
    # the adversary knows the same VALUE as a different formal object only
    # if it learned beta itself; here it did learn the scalar, so the only
    # legitimate path is the formal inverse, which is allowed:
    kn.add(other, "initial")
    kn.close()
    assert kn.holds_atom_label("M(2e2e)") is not None  # formal cancel is legal

    # but with a genuinely different scalar there is no derivation
    h2 = B.hash_to_group(b"secret2")
    base2 = terms.Atom("element", h2.encode(), label="M(3f3f)")
    blinded2 = terms.ExpTerm(
        base2, ((terms.scalar_atom(B.scalar(7).encode()).label, 1),),
        h2.exp(B.scalar(7)).encode())
    kn2 = Knowledge(B)
    kn2.add(blinded2, "tapped")
    kn2.add(terms.scalar_atom(B.scalar(2).encode()), "initial")
    kn2.close()
    assert kn2.holds_atom_label("M(3f3f)") is None


def test_channel_confidentiality_closure():
    # an honest handshake plus N <= 8 records never yields record plaintext
    import random as _random
    from dnascreen.channel import channel_send, handshake_pair, issue_tls_identity
    from dnascreen.crypto import SigningKey
    rng = _random.Random(31)
    ca = SigningKey.generate(rng)
    ident, static = issue_tls_identity(ca, "H", rng)
    client, server = handshake_pair("H", ca.verify_key, ident, static, B, rng)
    kn = Knowledge(B)
    for i in range(8):
        secret = terms.Atom("blob", b"plaintext-%d" % i)
        payload = terms.Payload(b"plaintext-%d" % i, secret)
        rec = channel_send(client if i % 2 == 0 else server, payload)
        kn.add(rec.term, "tapped")
    kn.close()
    for i in range(8):
        assert kn.holds_bytes(b"plaintext-%d" % i) is None


def test_secrecy_probe_over_honest_scenario():
    result = scenario_honest_basic(seed=41)
    probes = secrecy_probe(result.world.net, result.world.backend)
    assert probes and all(not p.leaked for p in probes)
    assert all(p.evidence == "not derivable" for p in probes)


def test_knowledge_monotone_in_inputs():
    result = scenario_honest_basic(seed=43)
    net = result.world.net
    kn_small = build_knowledge(net, result.world.backend)
    # add a corrupt-role key: knowledge can only grow
    net.add_initial_knowledge(
        terms.key_atom(b"\x99" * 32), "extra")
    kn_big = build_knowledge(net, result.world.backend)
    assert set(kn_small.items.keys()) <= set(kn_big.items.keys())


def test_record_slot_uniqueness_bookkeeping():
    result = scenario_honest_basic(seed=44)
    slots = result.world.net.record_key_slots()
    assert len(slots) == len(set(slots)) > 0


def test_honest_exemption_scenario_green():
    result = scenario_honest_exemption(seed=45)
    assert result.outcome.ok, result.outcome.render()


def test_transcript_contains_stable_fields():
    result = scenario_honest_basic(seed=46)
    line = result.transcript_text.splitlines()[0]
    for key in ("step=", "t=", "kind=", "link=", "conn=", "dir=", "seq=",
                "len=", "data="):
        assert key in line


def test_script_corrupt_command_applies_strategy():
    # a corrupt-but-functional database still answers queries correctly,
    # so the generic oracle assertion stays green while the corruption is
    # visible in the notes
    config = ScenarioConfig(elt_sequences=(DEFAULT_HAZARDS[0][0],))
    script = (f"corrupt H leaky\n"
              f"query-exempt S {HAZ},{CLEAN} code=fresh\n")
    result = run_scenario(config, script, seed=61)
    by_id = {a.id: a for a in result.outcome.assertions}
    assert by_id["query-1-matches-oracle"].passed
    assert any("stored the device code" in n for n in result.world.net.notes)
    assert "H" in result.world.net.corrupt


def test_script_corrupt_mitm_reports_the_damage():
    # under SCEP the corrupted keyserver drains the victim's budget, so the
    # victim's own query is denied; the script completes and reports it
    script = f"corrupt K1 mitm\nquery S {CLEAN}"
    result = run_scenario(ScenarioConfig(), script, seed=62)
    by_id = {a.id: a for a in result.outcome.assertions}
    assert not by_id["query-1-matches-oracle"].passed
    assert "RateLimited" in by_id["query-1-matches-oracle"].evidence


def test_script_swap_command_inverts_verdict():
    # the full text-command surface of the response-swap experiment
    config = ScenarioConfig(resumption=True)
    script = (f"swap S->H:s2c:0:r1 S->H:s2c:1:r1\n"
              f"query S {CLEAN}\n"
              f"resume-next S\n"
              f"query S {HAZ}\n")
    result = run_scenario(config, script, seed=63)
    by_id = {a.id: a for a in result.outcome.assertions}
    assert by_id["query-1-matches-oracle"].passed
    # the swapped-in response inverts the second verdict
    second = by_id["query-2-matches-oracle"]
    assert not second.passed
    assert "got grant, oracle says deny" in second.evidence
