"""The command-line front door: exit codes, OUTCOME lines, file formats."""

import pytest

from dnascreen.cli import main
from dnascreen.scenarios import CLEAN_SEQUENCES, DEFAULT_HAZARDS

HAZARD = DEFAULT_HAZARDS[0][0]
CLEAN = CLEAN_SEQUENCES[0]


def run_cli(capsys, *argv) -> tuple[int, str, str]:
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def test_pki_workshop_roundtrip(tmp_path, capsys):
    root = tmp_path / "root"
    inter = tmp_path / "inter"
    leaf = tmp_path / "leaf"
    tok = tmp_path / "tok"
    assert run_cli(capsys, "pki", "create-root", "--type", "manufacturer",
                   "--name", "F", "--out", str(root))[0] == 0
    assert run_cli(capsys, "pki", "issue-cert", "--issuer", str(root),
                   "--level", "intermediate", "--name", "MI",
                   "--out", str(inter))[0] == 0
    assert run_cli(capsys, "pki", "issue-cert", "--issuer", str(inter),
                   "--level", "leaf", "--name", "ML", "--out",
                   str(leaf))[0] == 0
    code, out, _ = run_cli(capsys, "pki", "issue-token", "--issuer", str(leaf),
                           "--type", "synthesizer", "--name", "S1",
                           "--rate-limit", "18446744073709551615",
                           "--out", str(tok))
    assert code == 0 and "sigma" in out
    code, out, _ = run_cli(capsys, "pki", "validate-chain", "--chain",
                           str(tok), "--root", str(root))
    assert code == 0 and "OUTCOME: OK" in out
    assert "rate_limit: 18446744073709551615" in \
        (tmp_path / "tok.cert.txt").read_text()


def test_pki_validate_byte_flip(tmp_path, capsys):
    root = tmp_path / "root"
    run_cli(capsys, "pki", "create-root", "--type", "infrastructure",
            "--name", "F", "--out", str(root))
    blob = bytearray((tmp_path / "root.cert").read_bytes())
    blob[40] ^= 1
    broken = tmp_path / "broken.cert"
    broken.write_bytes(bytes(blob))
    code, out, err = run_cli(capsys, "pki", "validate-chain", "--chain",
                             str(broken), "--root", str(root))
    assert code == 1
    assert "BadSignature" in err or "UntrustedRoot" in err \
        or "DecodeError" in err


def test_pki_level_violation_maps_to_exit_code(tmp_path, capsys):
    root = tmp_path / "root"
    run_cli(capsys, "pki", "create-root", "--type", "manufacturer",
            "--name", "F", "--out", str(root))
    code, _, err = run_cli(capsys, "pki", "issue-cert", "--issuer", str(root),
                           "--level", "leaf", "--name", "X",
                           "--out", str(tmp_path / "x"))
    assert code == 1 and "LevelViolation" in err


def test_run_basic_denies_hazard(tmp_path, capsys):
    order = tmp_path / "order.txt"
    order.write_text(f"{HAZARD.hex()}\n{CLEAN.hex()}\n")
    out_file = tmp_path / "transcript.log"
    code, out, _ = run_cli(capsys, "run", "basic", "--order", str(order),
                           "--seed", "3", "--out", str(out_file))
    assert code == 0
    assert "DENY" in out and "toxin-alpha" in out
    assert out.strip().endswith("OUTCOME: DENY")
    assert out_file.exists() and out_file.read_text().startswith("step=")


def test_run_basic_transcripts_are_reproducible(tmp_path, capsys):
    order = tmp_path / "order.txt"
    order.write_text(f"{CLEAN.hex()}\n")
    t1, t2 = tmp_path / "t1.log", tmp_path / "t2.log"
    run_cli(capsys, "run", "basic", "--order", str(order), "--seed", "9",
            "--out", str(t1))
    run_cli(capsys, "run", "basic", "--order", str(order), "--seed", "9",
            "--out", str(t2))
    assert t1.read_bytes() == t2.read_bytes()


def test_run_exemption_grants(tmp_path, capsys):
    order = tmp_path / "order.txt"
    order.write_text(f"{HAZARD.hex()}\n")
    code, out, _ = run_cli(capsys, "run", "exemption", "--order", str(order),
                           "--exempt", HAZARD.hex(), "--seed", "4")
    assert code == 0
    assert out.strip().endswith("OUTCOME: GRANT")


def test_run_custom_hazard_file(tmp_path, capsys):
    hazards = tmp_path / "hz.txt"
    seq = b"CCCCAAAATTTTGGGG"
    hazards.write_text(f"{seq.hex()} lab-agent restricted synthesis target\n")
    order = tmp_path / "order.txt"
    order.write_text(seq.hex() + "\n")
    code, out, _ = run_cli(capsys, "run", "basic", "--order", str(order),
                           "--hazards", str(hazards))
    assert code == 0 and "lab-agent" in out
    assert "OUTCOME: DENY" in out


def test_run_script_file(tmp_path, capsys):
    script = tmp_path / "scenario.txt"
    script.write_text(f"query S {CLEAN.hex()}\n"
                      f"advance-clock 30\n"
                      f"query S {HAZARD.hex()}\n")
    code, out, _ = run_cli(capsys, "run", "script", "--file", str(script))
    assert code == 0 and "OUTCOME: OK" in out


@pytest.mark.parametrize("args,expected", [
    (("attack", "mitm", "--scep-variant", "scep"), "OUTCOME: ATTACK_SUCCEEDED"),
    (("attack", "mitm", "--scep-variant", "scep-plus"),
     "OUTCOME: ATTACK_BLOCKED:BadClientSig"),
    (("attack", "swap", "--resumption", "on", "--bind-responses", "off"),
     "OUTCOME: VERDICT_INVERTED"),
    (("attack", "swap", "--resumption", "on", "--bind-responses", "on"),
     "OUTCOME: SWAP_DETECTED"),
    (("attack", "swap", "--resumption", "off", "--bind-responses", "off"),
     "OUTCOME: SWAP_REJECTED"),
    (("attack", "passcode"), "OUTCOME: REPLAY_ACCEPTED"),
    (("attack", "collision"), "OUTCOME: BUDGET_MERGED"),
    (("attack", "collision", "--distinct"), "OUTCOME: INDEPENDENT_BUDGETS"),
])
def test_attack_matrix_exit_zero(args, expected, capsys, tmp_path):
    code, out, _ = run_cli(capsys, *args, "--out",
                           str(tmp_path / "attack.log"))
    assert code == 0
    assert out.strip().splitlines()[-1] == expected
    assert (tmp_path / "attack.log").exists()


def test_attack_headlines(capsys, tmp_path):
    _, out, _ = run_cli(capsys, "attack", "mitm", "--scep-variant", "scep")
    assert out.splitlines()[0] == "ATTACK SUCCEEDED"
    _, out, _ = run_cli(capsys, "attack", "mitm", "--scep-variant",
                        "scep-plus")
    assert out.splitlines()[0] == "ATTACK BLOCKED: BadClientSig"
    _, out, _ = run_cli(capsys, "attack", "swap", "--resumption", "on",
                        "--bind-responses", "off")
    assert out.splitlines()[0] == "VERDICT INVERTED"


def test_pki_subtoken_roundtrip(tmp_path, capsys):
    root, inter, leaf = tmp_path / "root", tmp_path / "inter", tmp_path / "leaf"
    elt, sub = tmp_path / "elt", tmp_path / "sub"
    run_cli(capsys, "pki", "create-root", "--type", "exemption", "--name",
            "F", "--out", str(root))
    run_cli(capsys, "pki", "issue-cert", "--issuer", str(root), "--level",
            "intermediate", "--name", "EI", "--out", str(inter))
    run_cli(capsys, "pki", "issue-cert", "--issuer", str(inter), "--level",
            "leaf", "--name", "EL", "--out", str(leaf))
    seqs = "aabbccdd,eeff0011"
    assert run_cli(capsys, "pki", "issue-token", "--issuer", str(leaf),
                   "--type", "exemption", "--name", "C1", "--device-id",
                   "dev-1", "--sequences", seqs, "--out", str(elt))[0] == 0
    assert run_cli(capsys, "pki", "issue-subtoken", "--parent", str(elt),
                   "--subtoken-key", str(tmp_path / "elt.subkey"),
                   "--sequences", "aabbccdd", "--out", str(sub))[0] == 0
    code, out, _ = run_cli(capsys, "pki", "validate-chain", "--chain",
                           str(sub), "--root", str(root))
    assert code == 0 and "OUTCOME: OK" in out
    # a sub-token may not widen the sequence list
    code, _, err = run_cli(capsys, "pki", "issue-subtoken", "--parent",
                           str(elt), "--subtoken-key",
                           str(tmp_path / "elt.subkey"), "--sequences",
                           "aabbccdd,12121212", "--out", str(tmp_path / "bad"))
    assert code == 1 and "NotASubset" in err
