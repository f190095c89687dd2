"""Large-flip importance sampling for discrete pairwise Markov random fields."""
