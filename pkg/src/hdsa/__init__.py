"""hdsa: bipolar hypervector symbolic attention at desk scale.

Subpackages:
    hdc        hypervector kernels (bundle, bind, cosine, packed-binary twin)
    autodiff   reverse-mode AD over dense numpy tensors
    layers     trainable layers built on the autodiff core
    optim      AdamW optimizer
    attention  symbolic attention heads and the multi-head encoder block
    tasks      synthetic relational dataset generators and container IO
    pipelines  end-to-end classifier / seq2seq models, training, checkpoints
    bench      score-kernel microbenchmarks and parameter-memory accounting
    cli        command-line entry point (gen-data, train, eval, bench)
"""

__version__ = "0.1.0"
