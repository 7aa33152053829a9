"""SCEP and SCEP+ mutual-authentication state machines plus the rate ledger.

Both variants run inside an established channel as three messages:

  1. client hello:   r_S || client token chain || opaque keyserver extras
  2. server respond: omega || r_W || server token chain || sig_server
  3. client finish:  omega || sig_client

Under SCEP the signed hashes cover ("server-mutauth", r_S, r_W, T_server)
and ("client-mutauth", r_S, r_W, T_client): the client's signature names
neither the cookie nor the server, so it can be replayed to any server
that saw the same nonces. SCEP+ widens both hashes to cover the cookie and
BOTH tokens, binding each signature to one specific session.

The variant is scenario configuration, never negotiated on the wire: peers
configured differently fail with BadServerSig / BadClientSig.
"""

from dataclasses import dataclass, field

from . import terms, wire
from .channel import ChannelSession, channel_send
from .crypto import SigningKey
from .errors import (
    BadClientChain,
    BadClientSig,
    BadCookie,
    BadServerChain,
    BadServerSig,
    DecodeError,
    Revoked,
)
from .pki import (
    TOKEN_SYNTHESIZER,
    CertChain,
    Certificate,
    RevocationList,
    validate_chain,
)
from .terms import Payload

SCEP = "scep"
SCEP_PLUS = "scep-plus"
VARIANTS = (SCEP, SCEP_PLUS)

NONCE_SIZE = 32
COOKIE_SIZE = 32

STATE_INIT = "Init"
STATE_HELLO_SENT = "HelloSent"
STATE_RESPONDED = "Responded"
STATE_FINISHED = "Finished"
STATE_FAILED = "Failed"


def mutauth_hash(variant: str, label: bytes, r_s: bytes, r_w: bytes,
                 omega: bytes, client_token: bytes, server_token: bytes) -> bytes:
    """The hash each side signs. SCEP covers only the signer's own leg."""
    if variant == SCEP:
        own = server_token if label == b"server-mutauth" else client_token
        return wire.digest_fields(label, r_s, r_w, own)
    if variant == SCEP_PLUS:
        return wire.digest_fields(label, r_s, r_w, omega, client_token,
                                  server_token)
    raise ValueError(f"unknown variant {variant!r}")


def encode_hello(r_s: bytes, chain: CertChain, extra: bytes = b"") -> Payload:
    chain_b = chain.encode()
    data = r_s + wire.pack_fields(chain_b, extra)
    term = terms.cat(terms.nonce(r_s), terms.blob(chain_b),
                     terms.blob(extra, "text"))
    return Payload(data, term)


def decode_hello(plaintext: bytes) -> tuple[bytes, CertChain, bytes]:
    if len(plaintext) < NONCE_SIZE:
        raise DecodeError("hello shorter than its nonce")
    r_s = plaintext[:NONCE_SIZE]
    chain_b, extra = wire.expect_fields(plaintext[NONCE_SIZE:], 2)
    return r_s, CertChain.decode(chain_b), extra


def encode_respond(omega: bytes, r_w: bytes, chain: CertChain,
                   sig: bytes) -> Payload:
    chain_b = chain.encode()
    data = wire.pack_fields(omega, r_w, chain_b, sig)
    term = terms.cat(terms.Atom("cookie", omega), terms.nonce(r_w),
                     terms.blob(chain_b), terms.blob(sig))
    return Payload(data, term)


def decode_respond(plaintext: bytes) -> tuple[bytes, bytes, CertChain, bytes]:
    omega, r_w, chain_b, sig = wire.expect_fields(plaintext, 4)
    return omega, r_w, CertChain.decode(chain_b), sig


def encode_finish(omega: bytes, sig: bytes) -> Payload:
    data = wire.pack_fields(omega, sig)
    term = terms.cat(terms.Atom("cookie", omega), terms.blob(sig))
    return Payload(data, term)


def decode_finish(plaintext: bytes) -> tuple[bytes, bytes]:
    omega, sig = wire.expect_fields(plaintext, 2)
    return omega, sig


@dataclass
class Authenticated:
    """Successful server-side verification; binds the connection to (sigma, mu)."""

    sigma: bytes
    rate_limit: int
    client_token_bytes: bytes
    client_name: str


class ScepClientSession:
    """Client side of one SCEP(+) run inside one channel."""

    def __init__(self, variant: str, chain: CertChain, signing_key: SigningKey,
                 trusted_infra_root: Certificate, rng,
                 revocations: RevocationList | None = None,
                 keyserver_extra: bytes = b""):
        assert variant in VARIANTS
        self.variant = variant
        self.chain = chain
        self.signing_key = signing_key
        self.trusted_infra_root = trusted_infra_root
        self.revocations = revocations or RevocationList()
        self.keyserver_extra = keyserver_extra
        self.r_s = rng.randbytes(NONCE_SIZE)
        self.r_w = None
        self.cookie = None
        self.server_chain = None
        self.state = STATE_INIT

    def hello(self, channel: ChannelSession) -> Payload:
        payload = encode_hello(self.r_s, self.chain, self.keyserver_extra)
        self.state = STATE_HELLO_SENT
        return channel_send(channel, payload)

    def finish(self, response_plain: bytes, channel: ChannelSession,
               now: int) -> Payload:
        omega, r_w, server_chain, sig = decode_respond(response_plain)
        try:
            validate_chain(server_chain, self.trusted_infra_root, now,
                           self.revocations)
        except Exception as e:
            self.state = STATE_FAILED
            raise BadServerChain(f"server chain rejected: {e}") from None
        if server_chain.token is None:
            self.state = STATE_FAILED
            raise BadServerChain("server chain carries no token")
        # The presented token must belong to the channel peer the client
        # verified during the handshake; otherwise any certified server's
        # chain could be relayed.
        peer = channel.peer_server_identity
        if peer is not None and server_chain.token.subject_id.name != peer:
            self.state = STATE_FAILED
            raise BadServerChain(
                f"server token names {server_chain.token.subject_id.name!r} "
                f"but the channel authenticates {peer!r}")
        expected = mutauth_hash(self.variant, b"server-mutauth", self.r_s, r_w,
                                omega, self.chain.token.encode(),
                                server_chain.token.encode())
        if not server_chain.token.subject_key.verify(expected, sig):
            self.state = STATE_FAILED
            raise BadServerSig("server mutauth signature invalid")
        self.r_w = r_w
        self.cookie = omega
        self.server_chain = server_chain
        client_sig = self.signing_key.sign(
            mutauth_hash(self.variant, b"client-mutauth", self.r_s, r_w, omega,
                         self.chain.token.encode(), server_chain.token.encode()))
        self.state = STATE_FINISHED
        return channel_send(channel, encode_finish(omega, client_sig))

    def params(self) -> dict:
        """Session parameters for agreement bookkeeping."""
        return {
            "r_s": self.r_s,
            "r_w": self.r_w,
            "omega": self.cookie,
            "client_token": self.chain.token.encode(),
            "server_token": (self.server_chain.token.encode()
                             if self.server_chain else None),
        }


@dataclass
class ScepServerConfig:
    variant: str
    chain: CertChain
    signing_key: SigningKey
    trusted_manufacturer_root: Certificate
    revocations: RevocationList = field(default_factory=RevocationList)


class ScepServerSession:
    """Server side of one SCEP(+) run inside one connection."""

    def __init__(self, config: ScepServerConfig):
        self.config = config
        self.r_s = None
        self.r_w = None
        self.omega = None
        self.client_chain = None
        self.extra = b""
        self.state = STATE_INIT

    def respond(self, hello_plain: bytes, channel: ChannelSession, rng,
                now: int) -> Payload:
        r_s, client_chain, extra = decode_hello(hello_plain)
        try:
            validate_chain(client_chain, self.config.trusted_manufacturer_root,
                           now, self.config.revocations)
        except Revoked:
            self.state = STATE_FAILED
            raise
        except Exception as e:
            self.state = STATE_FAILED
            raise BadClientChain(f"client chain rejected: {e}") from None
        if client_chain.token is None:
            self.state = STATE_FAILED
            raise BadClientChain("client chain carries no token")
        self.r_s = r_s
        self.client_chain = client_chain
        self.extra = extra
        self.r_w = rng.randbytes(NONCE_SIZE)
        # The cookie is issued exactly once per session.
        self.omega = rng.randbytes(COOKIE_SIZE)
        sig = self.config.signing_key.sign(
            mutauth_hash(self.config.variant, b"server-mutauth", r_s, self.r_w,
                         self.omega, client_chain.token.encode(),
                         self.config.chain.token.encode()))
        self.state = STATE_RESPONDED
        return channel_send(channel,
                            encode_respond(self.omega, self.r_w,
                                           self.config.chain, sig))

    def verify(self, finish_plain: bytes) -> Authenticated:
        if self.state != STATE_RESPONDED:
            raise BadCookie(f"finish received in state {self.state}")
        omega, sig = decode_finish(finish_plain)
        if omega != self.omega:
            self.state = STATE_FAILED
            raise BadCookie("cookie echo does not match")
        token = self.client_chain.token
        expected = mutauth_hash(self.config.variant, b"client-mutauth",
                                self.r_s, self.r_w, self.omega,
                                token.encode(), self.config.chain.token.encode())
        if not token.subject_key.verify(expected, sig):
            self.state = STATE_FAILED
            raise BadClientSig("client mutauth signature invalid")
        self.state = STATE_FINISHED
        mu = (token.payload.rate_limit
              if token.token_type == TOKEN_SYNTHESIZER else 0)
        return Authenticated(sigma=token.sigma, rate_limit=mu,
                             client_token_bytes=token.encode(),
                             client_name=token.subject_id.name)

    def params(self) -> dict:
        return {
            "r_s": self.r_s,
            "r_w": self.r_w,
            "omega": self.omega,
            "client_token": (self.client_chain.token.encode()
                             if self.client_chain else None),
            "server_token": self.config.chain.token.encode(),
        }


# --- rate-limit ledger -----------------------------------------------------

WINDOW_SECONDS = 24 * 3600


class RateLimitLedger:
    """Per-sigma record of (timestamp, sequence_count), non-decreasing in time.

    Entries older than the sliding window are pruned on access; the
    brute-force oracle in the tests keeps the full history instead and must
    agree decision-for-decision.
    """

    def __init__(self):
        self.entries: dict[bytes, list[tuple[int, int]]] = {}

    def window_total(self, sigma: bytes, now: int) -> int:
        cutoff = now - WINDOW_SECONDS
        kept = [(ts, c) for ts, c in self.entries.get(sigma, []) if ts >= cutoff]
        self.entries[sigma] = kept
        return sum(c for _, c in kept)

    def record(self, sigma: bytes, now: int, count: int):
        history = self.entries.setdefault(sigma, [])
        if history and now < history[-1][0]:
            raise ValueError("ledger timestamps must be non-decreasing")
        history.append((now, count))


def rate_limit_check(ledger: RateLimitLedger, sigma: bytes,
                     requested_count: int, now: int, mu: int) -> bool:
    """True (Allow) iff the 24h window total stays within mu; records on Allow.

    The window is boundary-inclusive at both ends and denied requests do not
    consume budget.
    """
    if ledger.window_total(sigma, now) + requested_count > mu:
        return False
    ledger.record(sigma, now, requested_count)
    return True
