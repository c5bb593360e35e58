"""synthsup: measure how synthetic-image supplementation shifts a multi-label classifier.

The package is a self-contained study pipeline on a procedurally generated
toy corpus:

* ``toydata``      -- two-site multi-label image generator, label semantics,
                      patient-level splits, dataset serialization
* ``schedule``     -- forward-noising schedules (cosine, linear)
* ``conditioning`` -- 22-slot condition vector and embedding-row layout
* ``denoiser``     -- conditional UNet noise predictor
* ``diffusion``    -- trainer, guided noise prediction, implicit sampler,
                      replica generation
* ``classifier``   -- multi-label CNN with masked BCE, augmentation, EMA
* ``optim``        -- sign-momentum optimizer and EMA update rules
* ``metrics``      -- AUROC, bootstrap CIs, paired tests, feature-space
                      distances, co-occurrence comparison
* ``harness``      -- the supplementation-ratio experiment driver
* ``cli``          -- command-line entry points
"""

__version__ = "0.1.0"
