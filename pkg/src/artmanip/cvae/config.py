"""Architecture hyperparameters for the contact-map model."""

from __future__ import annotations

from dataclasses import dataclass

from ..errors import InvalidArgumentError

RGB_CHANNELS = 3
CONTACT_CHANNELS = 2
FORMAT = "artmanip-cvae"
VERSION = 1


@dataclass(frozen=True)
class SaLevel:
    """One set-abstraction stage: subsample, group, shared MLP, max-pool."""

    count: int
    radius: float
    neighbors: int
    widths: tuple[int, ...]

    def __post_init__(self):
        if self.count < 1 or self.neighbors < 1:
            raise InvalidArgumentError("counts and neighbor caps must be positive")
        if self.radius <= 0:
            raise InvalidArgumentError("ball radius must be positive")
        if not self.widths or any(w < 1 for w in self.widths):
            raise InvalidArgumentError("MLP widths must be positive")
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))


@dataclass(frozen=True)
class NetworkConfig:
    """Encoder levels, latent size, and decoder upconv widths.

    The decoder has one upconv stage per encoder level, consuming skip
    features from the matching resolution on the way back to the full
    cloud, plus a final linear head producing the two contact channels.
    """

    levels: tuple[SaLevel, ...] = (
        SaLevel(256, 0.05, 32, (32, 32)),
        SaLevel(64, 0.12, 16, (64, 64)),
        SaLevel(16, 0.28, 8, (64, 64)),
    )
    latent_dim: int = 8
    decoder_widths: tuple[tuple[int, ...], ...] = ((64, 64), (64, 64), (32,))
    upconv_neighbors: int = 3
    fps_seed: int = 0

    def __post_init__(self):
        if not self.levels:
            raise InvalidArgumentError("at least one abstraction level required")
        counts = [lvl.count for lvl in self.levels]
        if any(a <= b for a, b in zip(counts, counts[1:])):
            raise InvalidArgumentError("sample counts must be strictly decreasing")
        if self.latent_dim < 1:
            raise InvalidArgumentError("latent dimension must be positive")
        if len(self.decoder_widths) != len(self.levels):
            raise InvalidArgumentError("decoder needs one upconv stage per level")
        if any(not ws or any(w < 1 for w in ws) for ws in self.decoder_widths):
            raise InvalidArgumentError("decoder widths must be positive")
        if self.upconv_neighbors < 1:
            raise InvalidArgumentError("upconv neighbor count must be positive")

    def to_json(self) -> dict:
        return {"levels": [[l.count, l.radius, l.neighbors, list(l.widths)]
                           for l in self.levels],
                "latent_dim": self.latent_dim,
                "decoder_widths": [list(w) for w in self.decoder_widths],
                "upconv_neighbors": self.upconv_neighbors,
                "fps_seed": self.fps_seed}

    @staticmethod
    def from_json(d: dict) -> "NetworkConfig":
        levels = tuple(SaLevel(int(c), float(r), int(k), tuple(int(w) for w in ws))
                       for c, r, k, ws in d["levels"])
        return NetworkConfig(levels, int(d["latent_dim"]),
                             tuple(tuple(int(w) for w in ws)
                                   for ws in d["decoder_widths"]),
                             int(d["upconv_neighbors"]), int(d["fps_seed"]))


def default_config() -> NetworkConfig:
    return NetworkConfig()


def tiny_config(latent_dim: int = 4) -> NetworkConfig:
    """Small architecture for gradient checks on 32-point clouds."""
    return NetworkConfig(
        levels=(SaLevel(16, 0.3, 8, (8, 8)),
                SaLevel(8, 0.6, 4, (8, 8)),
                SaLevel(4, 1.2, 4, (8, 8))),
        latent_dim=latent_dim,
        decoder_widths=((8,), (8,), (8,)),
        upconv_neighbors=3)


def small_config(latent_dim: int = 8) -> NetworkConfig:
    """Mid-size architecture for 512-point scene clouds."""
    return NetworkConfig(
        levels=(SaLevel(128, 0.06, 16, (32, 32)),
                SaLevel(32, 0.15, 8, (48, 48)),
                SaLevel(8, 0.4, 8, (48, 48))),
        latent_dim=latent_dim,
        decoder_widths=((48, 48), (48, 48), (32,)),
        upconv_neighbors=3)
