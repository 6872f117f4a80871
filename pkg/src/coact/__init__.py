"""coact: shared-autonomy teleoperation workbench.

A human operator and a learned assistive agent jointly control simple 2-D
manipulation tasks. The agent is a conditional denoising diffusion model over
actions; control sharing works by forward-diffusing the human action part-way
and denoising it back conditioned on the current state. Collection rounds and
agent finetuning alternate until the agent can run fully autonomously.
"""

__version__ = "0.1.0"
