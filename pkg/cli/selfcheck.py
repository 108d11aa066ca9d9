"""
数值自检
按名称注册的检查项：流的往返与对数行列式、端到端梯度、KL恒等式、因果性扰动、频谱折叠和调度
每个检查返回 (是否通过, 说明)
"""
import logging
from collections import OrderedDict
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from engine import Tensor, finite_diff_grad, finite_diff_jacobian, no_grad, relative_error, check_gradients
from models.attention import AttentionConfig
from models.data_types import LinguisticFeature, PosteriorParams, Spectrogram
from models.glow_prior import GlowPrior
from models.layers import RandomSource
from models.vaenar import (
    VaenarConfig, VaenarTTS, expand_spectrogram, gaussian_log_density, reduce_spectrogram, reparam_sample,
)
from training.schedule import RFSchedule, r_at_epoch

logger = logging.getLogger(__name__)

CheckFn = Callable[[], Tuple[bool, str]]
KL_SAMPLES = 10000
CHECKS: "OrderedDict[str, CheckFn]" = OrderedDict()


@dataclass
class CheckResult:
    """单个检查结果"""
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail}"


def register(name: str):
    """注册检查项"""
    def decorator(fn: CheckFn) -> CheckFn:
        CHECKS[name] = fn
        return fn
    return decorator


# --- 小规模实例 ---
def tiny_model_config(causal: bool = True, reduction_factors: Sequence[int] = (1, 2)) -> VaenarConfig:
    """d_model=8、d_z=4、关闭丢弃的最小模型"""
    return VaenarConfig(
        vocab_size=43, embed_dim=8, prenet_layers=1, prenet_kernel=3, prenet_channels=8,
        d_model=8, n_heads=2, d_ffn=16, dropout_rate=0.0, encoder_blocks=1,
        posterior_prenet_dim=8, posterior_blocks=1, decoder_blocks=1, prior_blocks=2,
        prior_attention_blocks=1, d_z=4, n_bins=4, postnet_layers=2, postnet_channels=8,
        postnet_kernel=3, reduction_factors=tuple(reduction_factors), causal_mask=causal,
    )


def tiny_prior(d_z: int = 4, n_blocks: int = 2, seed: int = 0, causal: bool = True,
               randomize: float = 0.0) -> GlowPrior:
    """小先验；randomize > 0 时对全部参数加高斯扰动，使耦合层不再是恒等变换"""
    rng = np.random.default_rng(seed)
    cfg = AttentionConfig(d_model=8, n_heads=2, d_ffn=16, dropout_rate=0.0)
    prior = GlowPrior(d_z, cfg, n_blocks, 1, causal, rng, RandomSource(seed))
    prior.eval()
    if randomize > 0:
        for _, p in prior.named_parameters():
            p.data = p.data + randomize * rng.standard_normal(p.shape)
    return prior


def random_memory(n_chars: int, d_model: int = 8, seed: int = 0) -> LinguisticFeature:
    rng = np.random.default_rng([seed, 7])
    return LinguisticFeature(Tensor(rng.standard_normal((n_chars, d_model))), tuple(range(n_chars)))


def flow_round_trip_error(d_z: int, n_frames: int, seed: int) -> float:
    """随机参数下 reverse(forward(u)) 与 u 的最大绝对误差"""
    prior = tiny_prior(d_z=d_z, seed=seed, randomize=0.1)
    memory = random_memory(3, seed=seed)
    u = Tensor(np.random.default_rng([seed, 1]).standard_normal((n_frames, d_z)))
    with no_grad():
        z, _ = prior.forward_with_logdet(u, memory)
        back, _ = prior.inverse_with_logdet(z, memory)
    return float(np.max(np.abs(back.data - u.data)))


def flow_logdet_errors(seed: int, n_frames: int = 2, d_z: int = 4) -> List[float]:
    """每个流块的解析对数行列式与有限差分雅可比的 log|det| 之间的相对误差"""
    prior = tiny_prior(d_z=d_z, seed=seed, randomize=0.1)
    memory = random_memory(3, seed=seed)
    x = Tensor(np.random.default_rng([seed, 2]).standard_normal((n_frames, d_z)))
    errors = []
    for flow in prior.flows:
        with no_grad():
            _, analytic = flow.forward(x, memory)
        jac = finite_diff_jacobian(lambda t: flow.forward(t, memory)[0], x)
        _, brute = np.linalg.slogdet(jac)
        errors.append(relative_error(analytic.item(), brute, floor=1e-6))
    return errors


def kl_samples(prior: GlowPrior, mean: np.ndarray, n_samples: int, seed: int) -> np.ndarray:
    """单样本KL估计量的多次独立取值"""
    memory = random_memory(3, seed=seed)
    p = PosteriorParams(Tensor(mean), Tensor(np.zeros_like(mean)))
    rng = np.random.default_rng(seed)
    values = np.empty(n_samples)
    with no_grad():
        for i in range(n_samples):
            sample = reparam_sample(p, rng.standard_normal(mean.shape))
            values[i] = (gaussian_log_density(sample.z, p) - prior.log_density(sample.z, memory)).item()
    return values


def gradient_check_instance(seed: int = 0, alpha: float = 1.0, beta: float = 0.0, term: str = 'total'):
    """
    2个字符、6帧的端到端实例

    先验参数加入扰动，使零初始化的耦合输出层之前的参数也有非零梯度。
    长度预测器的输入与文本编码器断开，beta > 0 时文本编码器的解析梯度不含长度项，
    与有限差分不可比，端到端比对使用 beta=0，长度项单独对长度预测器比对。

    Args:
        seed: 模型与数据种子
        alpha: KL权重
        beta: 长度损失权重
        term: 'total'、'recon'、'kl' 或 'length'，闭包返回的损失项

    Returns:
        (模型, 损失闭包)
    """
    if term not in ('total', 'recon', 'kl', 'length'):
        raise ValueError(f"未知损失项 {term}")
    model = VaenarTTS(tiny_model_config(), seed=seed)
    rng = np.random.default_rng([seed, 3])
    for _, p in model.prior.named_parameters():
        p.data = p.data + 0.1 * rng.standard_normal(p.shape)
    y = Spectrogram(rng.standard_normal((6, 4)))
    noise = rng.standard_normal((3, 4))
    char_ids = (17, 18)
    attr = 'length_loss' if term == 'length' else term

    def loss_fn() -> Tensor:
        return getattr(model.compute_loss(y, char_ids, noise, 2, alpha, beta), attr)

    return model, loss_fn


def length_predictor_params(model: VaenarTTS):
    return [(name, p) for name, p in model.named_parameters() if name.startswith('length_predictor.')]


# --- 检查项 ---
@register("flow_round_trip")
def check_flow_round_trip() -> Tuple[bool, str]:
    worst = 0.0
    for seed in range(5):
        for d_z in (4, 32):
            worst = max(worst, flow_round_trip_error(d_z, 3, seed))
    return worst < 1e-8, f"最大往返误差 {worst:.2e}"


@register("flow_logdet_brute_force")
def check_flow_logdet() -> Tuple[bool, str]:
    errors = [e for seed in range(3) for e in flow_logdet_errors(seed)]
    worst = max(errors)
    return worst < 1e-4, f"最大相对误差 {worst:.2e}（{len(errors)} 个流块）"


@register("gradient_finite_difference")
def check_end_to_end_gradients() -> Tuple[bool, str]:
    """全部参数的每个元素：beta=0 比对总损失，另以 beta=1 比对长度预测器"""
    model, loss_fn = gradient_check_instance()
    report = check_gradients(loss_fn, model.named_parameters(), step=1e-5, floor=1e-6)
    length_model, length_fn = gradient_check_instance(beta=1.0)
    length_report = check_gradients(length_fn, length_predictor_params(length_model), step=1e-5, floor=1e-6)
    report.errors.update({f"beta=1:{k}": v for k, v in length_report.errors.items()})
    report.n_entries += length_report.n_entries
    name, worst = report.worst()
    fraction = report.fraction_below(1e-4)
    passed = fraction >= 0.99 and worst < 1e-3
    return passed, (f"{fraction:.1%} 参数相对误差 < 1e-4（{report.n_entries} 个元素），"
                    f"最差 {name} = {worst:.2e}")


@register("kl_standard_normal")
def check_kl_zero() -> Tuple[bool, str]:
    values = kl_samples(tiny_prior(), np.zeros((1, 4)), KL_SAMPLES, seed=11)
    mean = values.mean()
    stderr = values.std(ddof=1) / np.sqrt(len(values))
    return abs(mean) <= 3 * stderr + 1e-9, f"均值 {mean:.3e}，标准误 {stderr:.3e}"


@register("kl_shifted_mean")
def check_kl_shift() -> Tuple[bool, str]:
    mu = np.array([[0.5, -1.0, 0.25, 0.8]])
    expected = 0.5 * float(np.sum(mu * mu))
    values = kl_samples(tiny_prior(), mu, KL_SAMPLES, seed=12)
    mean = values.mean()
    stderr = values.std(ddof=1) / np.sqrt(len(values))
    return abs(mean - expected) <= 3 * stderr + 1e-9, f"均值 {mean:.4f}，解析值 {expected:.4f}，标准误 {stderr:.4f}"


@register("kl_gradient")
def check_kl_gradient() -> Tuple[bool, str]:
    prior = tiny_prior(randomize=0.1, seed=3)
    memory = random_memory(3, seed=3)
    rng = np.random.default_rng(5)
    mean = Tensor(rng.standard_normal((2, 4)), requires_grad=True)
    log_var = Tensor(0.1 * rng.standard_normal((2, 4)), requires_grad=True)
    noises = [rng.standard_normal((2, 4)) for _ in range(3)]

    def estimator(_=None) -> Tensor:
        p = PosteriorParams(mean, log_var)
        total = None
        for noise in noises:
            sample = reparam_sample(p, noise)
            value = gaussian_log_density(sample.z, p) - prior.log_density(sample.z, memory)
            total = value if total is None else total + value
        return total * (1.0 / len(noises))

    mean.zero_grad()
    estimator().backward()
    numeric = finite_diff_grad(estimator, mean, step=1e-5)
    error = relative_error(mean.grad, numeric, floor=1e-6)
    return error < 1e-4, f"均值梯度相对误差 {error:.2e}"


def _perturbed_rows_equal(fn: Callable[[np.ndarray], np.ndarray], base: np.ndarray, j: int,
                          rows_before: int) -> bool:
    perturbed = base.copy()
    perturbed[j:] += 1.0
    out_a = fn(base)
    out_b = fn(perturbed)
    return np.array_equal(out_a[:rows_before], out_b[:rows_before]) and not np.array_equal(out_a, out_b)


@register("causality_posterior")
def check_posterior_causality() -> Tuple[bool, str]:
    model = VaenarTTS(tiny_model_config(), seed=4).eval()
    with no_grad():
        memory = model.encode_text((17, 18, 19))
        y = np.random.default_rng(4).standard_normal((5, 8))

        def fn(arr):
            p, _ = model.posterior_encode(Tensor(arr), memory, 2)
            return np.concatenate([p.mean.data, p.log_var.data], axis=1)

        ok = all(_perturbed_rows_equal(fn, y, j, j) for j in range(1, 5))
    return ok, "位置 j 之后的扰动不影响位置 j 之前的均值与对数方差" if ok else "后验输出泄漏了未来帧信息"


@register("causality_prior_coupling")
def check_prior_causality() -> Tuple[bool, str]:
    prior = tiny_prior(randomize=0.1, seed=5)
    memory = random_memory(3, seed=5)
    z = np.random.default_rng(5).standard_normal((5, 4))
    with no_grad():
        coupling_ok = all(_perturbed_rows_equal(
            lambda a: prior.flows[0].coupling.forward(Tensor(a), memory)[0].data, z, j, j) for j in range(1, 5))
        stack_ok = all(_perturbed_rows_equal(
            lambda a: prior.forward_with_logdet(Tensor(a), memory)[0].data, z, j, j) for j in range(1, 5))
    ok = coupling_ok and stack_ok
    return ok, "耦合层与整个先验均满足帧级因果" if ok else f"因果性失败（耦合层 {coupling_ok}，整体 {stack_ok}）"


@register("causality_decoder")
def check_decoder_causality() -> Tuple[bool, str]:
    """
    只检查 PostNet 之前的输出（.before）。PostNet 的卷积在时间轴上左右各看若干帧，
    最终输出（.after）在窗口边界附近会受到后续隐变量帧影响，不在帧因果范围内。
    """
    model = VaenarTTS(tiny_model_config(), seed=6).eval()
    r = 2
    with no_grad():
        memory = model.encode_text((17, 18, 19))
        z = np.random.default_rng(6).standard_normal((4, 4))

        def fn(arr):
            return model.decoder(Tensor(arr), memory, r).before.data

        ok = all(_perturbed_rows_equal(fn, z, j, j * r) for j in range(1, 4))
    return ok, "PostNet 之前的输出在帧 j*r 之前不受隐变量帧 j 之后的影响" if ok else "解码器泄漏了未来帧信息"


@register("reduce_expand_round_trip")
def check_reduce_expand() -> Tuple[bool, str]:
    rng = np.random.default_rng(8)
    y = rng.standard_normal((7, 3))
    for r in range(1, 6):
        back = expand_spectrogram(reduce_spectrogram(y, r), r, 7).data
        if not np.array_equal(back, y):
            return False, f"r={r} 往返不一致"
    return True, "r=1..5 折叠后展开与原频谱逐位相同"


@register("schedule_full_scale")
def check_schedule() -> Tuple[bool, str]:
    sched = RFSchedule.full_scale()
    got = [r_at_epoch(sched, e) for e in (0, 200, 400, 600, 2000)]
    return got == [5, 4, 3, 2, 2], f"轮次 0/200/400/600/2000 -> {got}"


def run_checks(names: Optional[Sequence[str]] = None) -> List[CheckResult]:
    """
    运行检查项

    Args:
        names: 只运行这些检查，默认全部

    Returns:
        按注册顺序的检查结果
    """
    selected = list(CHECKS) if not names else list(names)
    unknown = [n for n in selected if n not in CHECKS]
    if unknown:
        raise KeyError(f"未知检查项: {unknown}")
    results = []
    for name in selected:
        try:
            passed, detail = CHECKS[name]()
        except Exception as e:
            passed, detail = False, f"{type(e).__name__}: {e}"
        logger.debug(f"【自检】{name}: {'通过' if passed else '失败'}")
        results.append(CheckResult(name, bool(passed), detail))
    return results
