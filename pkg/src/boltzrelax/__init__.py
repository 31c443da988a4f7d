"""boltzrelax: continuous relaxations of Boltzmann machine priors for importance-weighted VAEs."""
